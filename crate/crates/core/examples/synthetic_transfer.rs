//! Sequential fine-tuning on the synthetic learner: the same A -> B -> C
//! sequence under each strategy, with a hindsight discriminator standing in
//! for a trained selector.

use seqft::benchmark::{generate_synthetic_benchmark, SyntheticBenchmarkSpec};
use seqft::engine::{Engine, HindsightDiscriminator, Strategy};
use seqft::seed::derive_seed;
use seqft::selector::SelectiveConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = SyntheticBenchmarkSpec::default();
    let generated = generate_synthetic_benchmark(&spec)?;
    let bench = &generated.benchmark;
    let backend = generated.backend();
    let engine = Engine::new(&backend).with_families(bench.families());

    for t in bench.triplets.iter().step_by(4) {
        let tasks: Vec<_> = [&t.a, &t.b, &t.c].iter().map(|id| bench.task(id).expect("known task")).collect();
        let seed = derive_seed(spec.seed, &t.id());
        let hindsight = HindsightDiscriminator { engine: &engine, budget: spec.budget, seed, margin: 0.0 };
        print!("{:<8} {:<26}", t.config.tag(), t.id());
        for (name, strategy) in [
            ("naive", Strategy::Naive),
            ("selective", Strategy::Selective { discriminator: &hindsight, config: SelectiveConfig::default() }),
            ("oracle", Strategy::Oracle { max_depth: 4 }),
        ] {
            let run = engine.run_sequence(&tasks, strategy, spec.budget, seed)?;
            let last = run.outcomes.last().expect("three tasks");
            print!("  {name} {:+6.1}% (from {})", 100.0 * last.relative, last.init_id);
        }
        println!();
    }
    Ok(())
}
